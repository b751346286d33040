//! Task templates: parameterized initial layouts whose simulations decide
//! whether the green body ends up touching the blue one. Every template can
//! produce both labels depending on the sampled layout.

use super::render::render_frame;
use super::{
    find_color, pair_surface_distance, simulate_step, Body, BodyColor, Vec2, WorldState,
    GRAVITY_DEFAULT,
};
use crate::error::{Error, Result};
use crate::physics::dataset::Label;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Success means touching within 1% of the frame width at the end of the
/// simulation; the bound is inclusive.
pub const CONTACT_EPSILON: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TemplateKind {
    /// A ball falls toward a target resting on the floor.
    DropOntoTarget,
    /// A ball slides off a ramp and may coast into the target.
    RampRoll,
    /// A ball drops toward a target that a ledge may shield.
    BlockedPath,
    /// Zero gravity, nothing moves: the label is readable from frame one.
    Sanity,
}

impl TemplateKind {
    pub fn id(self) -> u32 {
        match self {
            TemplateKind::DropOntoTarget => 0,
            TemplateKind::RampRoll => 1,
            TemplateKind::BlockedPath => 2,
            TemplateKind::Sanity => 3,
        }
    }

    pub fn from_id(id: u32) -> Result<Self> {
        Ok(match id {
            0 => TemplateKind::DropOntoTarget,
            1 => TemplateKind::RampRoll,
            2 => TemplateKind::BlockedPath,
            3 => TemplateKind::Sanity,
            other => return Err(Error::Template(format!("unknown template id {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::DropOntoTarget => "drop-onto-target",
            TemplateKind::RampRoll => "ramp-roll",
            TemplateKind::BlockedPath => "blocked-path",
            TemplateKind::Sanity => "sanity",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TaskTemplate {
    pub kind: TemplateKind,
    /// Sampled frame count range, inclusive.
    pub frames_min: usize,
    pub frames_max: usize,
    /// Simulation steps per rendered frame.
    pub steps_per_frame: usize,
    pub dt: f64,
}

impl TaskTemplate {
    pub fn new(kind: TemplateKind, frames_min: usize, frames_max: usize, dt: f64, steps_per_frame: usize) -> Self {
        TaskTemplate { kind, frames_min, frames_max, steps_per_frame, dt }
    }

    /// Samples the initial world. Instances always contain exactly one green
    /// and one blue body.
    pub fn sample_world(&self, rng: &mut Rng) -> WorldState {
        let floor = Body::static_segment(Vec2::new(-0.2, 0.05), Vec2::new(1.2, 0.05), BodyColor::Gray, 0.3);
        match self.kind {
            TemplateKind::DropOntoTarget => {
                let xb = rng.uniform(0.25, 0.75);
                let blue = Body::static_circle(Vec2::new(xb, 0.12), 0.07, BodyColor::Blue, 0.3);
                let xg = rng.uniform(0.2, 0.8);
                let yg = rng.uniform(0.6, 0.85);
                let vx = rng.uniform(-0.3, 0.3);
                let green = Body::dynamic_circle(
                    Vec2::new(xg, yg),
                    Vec2::new(vx, 0.0),
                    0.07,
                    BodyColor::Green,
                    0.4,
                    0.6,
                );
                WorldState::new(vec![floor, blue, green], GRAVITY_DEFAULT)
            }
            TemplateKind::RampRoll => {
                let top_y = rng.uniform(0.35, 0.6);
                let ramp_a = Vec2::new(0.05, top_y);
                let ramp_b = Vec2::new(0.55, 0.12);
                let ramp = Body::static_segment(ramp_a, ramp_b, BodyColor::Gray, 0.1);
                // place the ball a little above the upper end of the ramp
                let along = rng.uniform(0.1, 0.25);
                let px = ramp_a.x + (ramp_b.x - ramp_a.x) * along;
                let py = ramp_a.y + (ramp_b.y - ramp_a.y) * along + 0.09;
                let green = Body::dynamic_circle(
                    Vec2::new(px, py),
                    Vec2::ZERO,
                    0.06,
                    BodyColor::Green,
                    0.15,
                    rng.uniform(0.3, 0.8),
                );
                let xb = rng.uniform(0.6, 0.92);
                let blue = Body::static_circle(Vec2::new(xb, 0.11), 0.06, BodyColor::Blue, 0.3);
                WorldState::new(vec![floor, ramp, blue, green], GRAVITY_DEFAULT)
            }
            TemplateKind::BlockedPath => {
                let xg = rng.uniform(0.35, 0.65);
                let green = Body::dynamic_circle(
                    Vec2::new(xg, 0.8),
                    Vec2::ZERO,
                    0.06,
                    BodyColor::Green,
                    0.3,
                    0.4,
                );
                let xb = xg + rng.uniform(-0.05, 0.05);
                let blue = Body::static_circle(Vec2::new(xb, 0.12), 0.07, BodyColor::Blue, 0.3);
                let xw = rng.uniform(0.2, 0.8);
                let ledge = Body::static_segment(
                    Vec2::new(xw - 0.12, 0.45),
                    Vec2::new(xw + 0.12, 0.45),
                    BodyColor::Gray,
                    0.4,
                );
                WorldState::new(vec![floor, ledge, blue, green], GRAVITY_DEFAULT)
            }
            TemplateKind::Sanity => {
                // a small discrete layout grid keeps the instance space
                // coverable by a desk-sized training set (within-template
                // evaluation: eval layouts recur in training), and the
                // "apart" gap spans more than one token cell so the two
                // classes never alias in token space
                let rg = 0.11;
                let rb = 0.11;
                let spots = [0.35, 0.65];
                let gx = spots[rng.below(2)];
                let gy = spots[rng.below(2)];
                let touching = rng.bool();
                let gap = if touching { 0.002 } else { 0.3 };
                let (bx, by) = loop {
                    let theta = std::f64::consts::FRAC_PI_2 * rng.below(4) as f64;
                    let d = rg + rb + gap;
                    let bx = gx + d * theta.cos();
                    let by = gy + d * theta.sin();
                    if (0.13..=0.87).contains(&bx) && (0.13..=0.87).contains(&by) {
                        break (bx, by);
                    }
                };
                let green = Body::dynamic_circle(
                    Vec2::new(gx, gy),
                    Vec2::ZERO,
                    rg,
                    BodyColor::Green,
                    0.5,
                    0.0,
                );
                let blue = Body::static_circle(Vec2::new(bx, by), rb, BodyColor::Blue, 0.5);
                WorldState::new(vec![blue, green], 0.0)
            }
        }
    }
}

/// One simulated task: every integrator state, plus which steps were rendered.
pub struct Trajectory {
    pub states: Vec<WorldState>,
}

/// Simulates a sampled instance and renders frames every `steps_per_frame`
/// steps. Deterministic per (template, seed).
pub fn run_task(
    template: &TaskTemplate,
    seed: u64,
    width: usize,
    height: usize,
) -> Result<(Trajectory, Vec<Tensor<f32>>)> {
    let mut rng = Rng::seed_from_u64(seed);
    let frames_total = if template.frames_max > template.frames_min {
        template.frames_min + rng.below(template.frames_max - template.frames_min + 1)
    } else {
        template.frames_min
    };
    let world = template.sample_world(&mut rng);

    let mut states = Vec::with_capacity((frames_total - 1) * template.steps_per_frame + 1);
    states.push(world);
    let mut frames = Vec::with_capacity(frames_total);
    frames.push(render_frame(&states[0], width, height));
    for _ in 1..frames_total {
        for _ in 0..template.steps_per_frame {
            let next = simulate_step(states.last().expect("nonempty"), template.dt);
            states.push(next);
        }
        frames.push(render_frame(states.last().expect("nonempty"), width, height));
    }
    Ok((Trajectory { states }, frames))
}

/// Success iff the green and blue surfaces are within `epsilon` at the final
/// simulation state (inclusive). Labels come from the trajectory, never from
/// pixels.
pub fn label_task(trajectory: &Trajectory, epsilon: f64) -> Result<Label> {
    let last = trajectory
        .states
        .last()
        .ok_or_else(|| Error::input("label_task: empty trajectory"))?;
    let green = find_color(last, BodyColor::Green)?;
    let blue = find_color(last, BodyColor::Blue)?;
    if pair_surface_distance(green, blue) <= epsilon {
        Ok(Label::Success)
    } else {
        Ok(Label::Failure)
    }
}

/// The built-in template set, configured for a frame-count range.
pub fn builtin_templates(frames_min: usize, frames_max: usize, dt: f64, steps_per_frame: usize) -> Vec<TaskTemplate> {
    [
        TemplateKind::DropOntoTarget,
        TemplateKind::RampRoll,
        TemplateKind::BlockedPath,
        TemplateKind::Sanity,
    ]
    .into_iter()
    .map(|kind| TaskTemplate::new(kind, frames_min, frames_max, dt, steps_per_frame))
    .collect()
}
