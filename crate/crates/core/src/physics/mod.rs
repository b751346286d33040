//! Deterministic 2D physics: circles under constant gravity with linear
//! velocity damping, bouncing off each other and off static segments.
//! The world lives in the unit square; rasterization maps it to pixels.
//!
//! Integrator: semi-implicit Euler at a fixed dt. Per step, for every
//! dynamic body: `v += g*dt; v *= 1 - friction*dt; x += v*dt`, then impulse
//! collision resolution with restitution and full positional projection.

mod dataset;
mod render;
mod template;

pub use dataset::{
    generate_dataset, load_dataset, read_fpv1, write_fpv1, Label, Manifest, ManifestEntry, Split,
    VideoSample,
};
pub use render::{render_frame, write_ppm};
pub use template::{
    builtin_templates, label_task, run_task, TaskTemplate, TemplateKind, Trajectory,
    CONTACT_EPSILON,
};

use crate::error::{Error, Result};

pub const GRAVITY_DEFAULT: f64 = -10.0;

/// Positional projection passes per step; simple scenes settle in one or two.
const RESOLUTION_PASSES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BodyColor {
    Green,
    Blue,
    Red,
    Gray,
}

impl BodyColor {
    pub fn rgb(self) -> [f64; 3] {
        match self {
            BodyColor::Green => [0.0, 0.8, 0.0],
            BodyColor::Blue => [0.1, 0.2, 0.9],
            BodyColor::Red => [0.9, 0.1, 0.1],
            BodyColor::Gray => [0.5, 0.5, 0.5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BodyKind {
    DynamicCircle { radius: f64 },
    StaticCircle { radius: f64 },
    StaticSegment { a: Vec2, b: Vec2 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Body {
    pub kind: BodyKind,
    /// Circle center; unused for segments (endpoints are absolute).
    pub position: Vec2,
    /// Always zero for static bodies.
    pub velocity: Vec2,
    pub color: BodyColor,
    pub restitution: f64,
    pub friction: f64,
}

impl Body {
    pub fn dynamic_circle(
        position: Vec2,
        velocity: Vec2,
        radius: f64,
        color: BodyColor,
        restitution: f64,
        friction: f64,
    ) -> Self {
        Body { kind: BodyKind::DynamicCircle { radius }, position, velocity, color, restitution, friction }
    }

    pub fn static_circle(position: Vec2, radius: f64, color: BodyColor, restitution: f64) -> Self {
        Body {
            kind: BodyKind::StaticCircle { radius },
            position,
            velocity: Vec2::ZERO,
            color,
            restitution,
            friction: 0.0,
        }
    }

    pub fn static_segment(a: Vec2, b: Vec2, color: BodyColor, restitution: f64) -> Self {
        Body {
            kind: BodyKind::StaticSegment { a, b },
            position: Vec2::ZERO,
            velocity: Vec2::ZERO,
            color,
            restitution,
            friction: 0.0,
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self.kind, BodyKind::DynamicCircle { .. })
    }

    pub fn radius(&self) -> Option<f64> {
        match self.kind {
            BodyKind::DynamicCircle { radius } | BodyKind::StaticCircle { radius } => Some(radius),
            BodyKind::StaticSegment { .. } => None,
        }
    }

    fn inv_mass(&self) -> f64 {
        // dynamic circles carry unit mass; statics are immovable
        if self.is_dynamic() {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub bodies: Vec<Body>,
    pub time: f64,
    /// Constant downward acceleration (negative y).
    pub gravity: Vec2,
}

impl WorldState {
    pub fn new(bodies: Vec<Body>, gravity_y: f64) -> Self {
        WorldState { bodies, time: 0.0, gravity: Vec2::new(0.0, gravity_y) }
    }

    /// Kinetic plus gravitational potential energy of the dynamic bodies
    /// (unit mass). Used by the dissipation tests.
    pub fn mechanical_energy(&self) -> f64 {
        self.bodies
            .iter()
            .filter(|b| b.is_dynamic())
            .map(|b| 0.5 * b.velocity.dot(b.velocity) - self.gravity.y * b.position.y)
            .sum()
    }
}

/// Per-step diagnostics from [`simulate_step_detailed`].
#[derive(Clone, Copy, Debug, Default)]
pub struct StepInfo {
    /// Contacts that received an impulse or positional correction.
    pub contacts: usize,
}

/// Advances the world by `dt` seconds.
pub fn simulate_step(state: &WorldState, dt: f64) -> WorldState {
    simulate_step_detailed(state, dt).0
}

pub fn simulate_step_detailed(state: &WorldState, dt: f64) -> (WorldState, StepInfo) {
    debug_assert!(dt > 0.0, "dt must be positive");
    let mut next = state.clone();
    for body in &mut next.bodies {
        if !body.is_dynamic() {
            continue;
        }
        body.velocity = body.velocity.add(next.gravity.scale(dt));
        body.velocity = body.velocity.scale(1.0 - body.friction * dt);
        body.position = body.position.add(body.velocity.scale(dt));
    }
    let mut info = StepInfo::default();
    for _ in 0..RESOLUTION_PASSES {
        let resolved = resolve_contacts(&mut next);
        info.contacts += resolved;
        if resolved == 0 {
            break;
        }
    }
    next.time += dt;
    (next, info)
}

/// One resolution pass over all pairs; returns the number of contacts acted on.
fn resolve_contacts(state: &mut WorldState) -> usize {
    let n = state.bodies.len();
    let mut resolved = 0;
    for i in 0..n {
        if !state.bodies[i].is_dynamic() {
            continue;
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            // dynamic-dynamic pairs handled once, from the lower index
            if state.bodies[j].is_dynamic() && j < i {
                continue;
            }
            if let Some(contact) = find_contact(&state.bodies[i], &state.bodies[j]) {
                apply_contact(state, i, j, contact);
                resolved += 1;
            }
        }
    }
    resolved
}

/// Contact normal points from body `j` toward body `i`.
#[derive(Clone, Copy, Debug)]
struct Contact {
    normal: Vec2,
    penetration: f64,
}

fn find_contact(a: &Body, b: &Body) -> Option<Contact> {
    let ra = a.radius()?;
    match b.kind {
        BodyKind::DynamicCircle { radius: rb } | BodyKind::StaticCircle { radius: rb } => {
            let delta = a.position.sub(b.position);
            let dist = delta.norm();
            let overlap = ra + rb - dist;
            if overlap <= 0.0 {
                return None;
            }
            let normal = if dist > 1e-12 { delta.scale(1.0 / dist) } else { Vec2::new(0.0, 1.0) };
            Some(Contact { normal, penetration: overlap })
        }
        BodyKind::StaticSegment { a: p, b: q } => {
            let closest = closest_point_on_segment(a.position, p, q);
            let delta = a.position.sub(closest);
            let dist = delta.norm();
            let overlap = ra - dist;
            if overlap <= 0.0 {
                return None;
            }
            let normal = if dist > 1e-12 {
                delta.scale(1.0 / dist)
            } else {
                // center exactly on the segment: push along the segment normal
                let seg = q.sub(p);
                let n = Vec2::new(-seg.y, seg.x);
                let len = n.norm().max(1e-12);
                n.scale(1.0 / len)
            };
            Some(Contact { normal, penetration: overlap })
        }
    }
}

pub fn closest_point_on_segment(point: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    if len2 <= 1e-18 {
        return a;
    }
    let t = (point.sub(a).dot(ab) / len2).clamp(0.0, 1.0);
    a.add(ab.scale(t))
}

fn apply_contact(state: &mut WorldState, i: usize, j: usize, c: Contact) {
    let inv_i = state.bodies[i].inv_mass();
    let inv_j = state.bodies[j].inv_mass();
    let inv_sum = inv_i + inv_j;
    if inv_sum == 0.0 {
        return;
    }
    // restitution: the softer body dominates
    let e = state.bodies[i].restitution.min(state.bodies[j].restitution);
    let rel = state.bodies[i].velocity.sub(state.bodies[j].velocity);
    let vel_n = rel.dot(c.normal);
    if vel_n < 0.0 {
        let impulse = -(1.0 + e) * vel_n / inv_sum;
        let dv = c.normal.scale(impulse);
        let vi = state.bodies[i].velocity.add(dv.scale(inv_i));
        state.bodies[i].velocity = vi;
        if inv_j > 0.0 {
            let vj = state.bodies[j].velocity.sub(dv.scale(inv_j));
            state.bodies[j].velocity = vj;
        }
    }
    // full positional projection along the normal, split by inverse mass
    let push = c.normal.scale(c.penetration / inv_sum);
    let pi = state.bodies[i].position.add(push.scale(inv_i));
    state.bodies[i].position = pi;
    if inv_j > 0.0 {
        let pj = state.bodies[j].position.sub(push.scale(inv_j));
        state.bodies[j].position = pj;
    }
}

/// Distance between the outer surfaces of the green and blue body pair;
/// zero or negative means touching.
pub fn pair_surface_distance(green: &Body, blue: &Body) -> f64 {
    match (green.kind, blue.kind) {
        (BodyKind::DynamicCircle { radius: rg } | BodyKind::StaticCircle { radius: rg }, _) => {
            match blue.kind {
                BodyKind::DynamicCircle { radius: rb } | BodyKind::StaticCircle { radius: rb } => {
                    green.position.sub(blue.position).norm() - rg - rb
                }
                BodyKind::StaticSegment { a, b } => {
                    let c = closest_point_on_segment(green.position, a, b);
                    green.position.sub(c).norm() - rg
                }
            }
        }
        (BodyKind::StaticSegment { a, b }, _) => {
            // symmetric: treat the segment as the surface
            let c = closest_point_on_segment(blue.position, a, b);
            blue.position.sub(c).norm() - blue.radius().unwrap_or(0.0)
        }
    }
}

pub(crate) fn find_color(state: &WorldState, color: BodyColor) -> Result<&Body> {
    let mut found = None;
    for b in &state.bodies {
        if b.color == color {
            if found.is_some() {
                return Err(Error::Template(format!("more than one {color:?} body")));
            }
            found = Some(b);
        }
    }
    found.ok_or_else(|| Error::Template(format!("no {color:?} body in world")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn free_fall_world(friction: f64) -> WorldState {
        WorldState::new(
            vec![Body::dynamic_circle(
                Vec2::new(0.5, 0.8),
                Vec2::ZERO,
                0.05,
                BodyColor::Green,
                0.5,
                friction,
            )],
            GRAVITY_DEFAULT,
        )
    }

    #[test]
    fn free_fall_without_friction_matches_closed_form() {
        let mut state = free_fall_world(0.0);
        let dt = 0.01;
        let mut expected_v = 0.0;
        let mut expected_y = 0.8;
        for _ in 0..100 {
            state = simulate_step(&state, dt);
            // oracle: the update rule integrated independently
            expected_v += GRAVITY_DEFAULT * dt;
            expected_y += expected_v * dt;
        }
        let b = &state.bodies[0];
        assert!((b.velocity.y - expected_v).abs() < 1e-9, "{} vs {expected_v}", b.velocity.y);
        assert!((b.position.y - expected_y).abs() < 1e-9);
        assert!((b.velocity.y - -10.0).abs() < 1e-9);
    }

    #[test]
    fn free_fall_with_friction_matches_geometric_series() {
        let friction = 0.3;
        let mut state = free_fall_world(friction);
        let dt = 0.01;
        let n = 250;
        for _ in 0..n {
            state = simulate_step(&state, dt);
        }
        // closed form: v_k = (v_{k-1} + G) * D with G = g dt, D = 1 - f dt
        let g_term = GRAVITY_DEFAULT * dt;
        let d = 1.0 - friction * dt;
        let v_closed = g_term * d * (d.powi(n) - 1.0) / (d - 1.0);
        assert!(
            (state.bodies[0].velocity.y - v_closed).abs() < 1e-9,
            "{} vs {v_closed}",
            state.bodies[0].velocity.y
        );
    }

    #[test]
    fn statics_never_move() {
        let seg = Body::static_segment(Vec2::new(0.0, 0.1), Vec2::new(1.0, 0.1), BodyColor::Gray, 0.5);
        let circ = Body::static_circle(Vec2::new(0.3, 0.4), 0.1, BodyColor::Blue, 0.5);
        let mut state = WorldState::new(vec![seg, circ], GRAVITY_DEFAULT);
        let orig = state.bodies.clone();
        for _ in 0..500 {
            state = simulate_step(&state, 0.01);
        }
        assert_eq!(state.bodies, orig);
    }

    #[test]
    fn elastic_head_on_collision_swaps_velocities() {
        let a = Body::dynamic_circle(Vec2::new(0.3, 0.5), Vec2::new(1.0, 0.0), 0.05, BodyColor::Green, 1.0, 0.0);
        let b = Body::dynamic_circle(Vec2::new(0.42, 0.5), Vec2::new(-1.0, 0.0), 0.05, BodyColor::Blue, 1.0, 0.0);
        let mut state = WorldState::new(vec![a, b], 0.0);
        for _ in 0..5 {
            state = simulate_step(&state, 0.01);
        }
        assert!((state.bodies[0].velocity.x - -1.0).abs() < 1e-9);
        assert!((state.bodies[1].velocity.x - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ball_settles_on_segment_without_penetration() {
        let ball = Body::dynamic_circle(Vec2::new(0.5, 0.6), Vec2::ZERO, 0.08, BodyColor::Green, 0.2, 0.1);
        let floor = Body::static_segment(Vec2::new(0.0, 0.1), Vec2::new(1.0, 0.1), BodyColor::Gray, 0.2);
        let mut state = WorldState::new(vec![ball, floor], GRAVITY_DEFAULT);
        for _ in 0..2000 {
            state = simulate_step(&state, 0.01);
            let y = state.bodies[0].position.y;
            assert!(y >= 0.1 + 0.08 - 1e-6, "penetrated floor: y = {y}");
        }
        // settled: resting on the floor
        assert!((state.bodies[0].position.y - 0.18).abs() < 1e-3);
        assert!(state.bodies[0].velocity.norm() < 0.15);
    }

    #[test]
    fn energy_non_increasing_between_collision_free_steps() {
        let mut rng = crate::rng::Rng::seed_from_u64(1234);
        let mut checked = 0usize;
        while checked < 10_000 {
            // fresh random world every 100 steps
            let mut state = WorldState::new(
                vec![
                    Body::dynamic_circle(
                        Vec2::new(rng.uniform(0.2, 0.8), rng.uniform(0.4, 0.9)),
                        Vec2::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)),
                        rng.uniform(0.03, 0.1),
                        BodyColor::Green,
                        rng.uniform(0.0, 1.0),
                        rng.uniform(0.0, 0.9),
                    ),
                    Body::dynamic_circle(
                        Vec2::new(rng.uniform(0.2, 0.8), rng.uniform(0.4, 0.9)),
                        Vec2::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)),
                        rng.uniform(0.03, 0.1),
                        BodyColor::Blue,
                        rng.uniform(0.0, 1.0),
                        rng.uniform(0.0, 0.9),
                    ),
                    Body::static_segment(Vec2::new(0.0, 0.05), Vec2::new(1.0, 0.05), BodyColor::Gray, 0.5),
                ],
                GRAVITY_DEFAULT,
            );
            for _ in 0..100 {
                let before = state.mechanical_energy();
                let (next, info) = simulate_step_detailed(&state, 0.01);
                if info.contacts == 0 {
                    let after = next.mechanical_energy();
                    assert!(
                        after <= before + 1e-12,
                        "energy grew on a collision-free step: {before} -> {after}"
                    );
                    checked += 1;
                }
                state = next;
            }
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let build = || {
            let mut s = WorldState::new(
                vec![
                    Body::dynamic_circle(Vec2::new(0.4, 0.7), Vec2::new(0.3, 0.0), 0.06, BodyColor::Green, 0.6, 0.2),
                    Body::static_circle(Vec2::new(0.6, 0.2), 0.08, BodyColor::Blue, 0.4),
                    Body::static_segment(Vec2::new(0.0, 0.05), Vec2::new(1.0, 0.05), BodyColor::Gray, 0.3),
                ],
                GRAVITY_DEFAULT,
            );
            for _ in 0..300 {
                s = simulate_step(&s, 0.01);
            }
            s
        };
        let a = build();
        let b = build();
        for (x, y) in a.bodies.iter().zip(&b.bodies) {
            assert_eq!(x.position.x.to_bits(), y.position.x.to_bits());
            assert_eq!(x.position.y.to_bits(), y.position.y.to_bits());
            assert_eq!(x.velocity.x.to_bits(), y.velocity.x.to_bits());
        }
    }
}
