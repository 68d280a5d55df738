use super::{around, check_dims, uniform, Env};
use crate::error::Result;

/// A gripper and a block on the segment `[-1, 1]`.
///
/// State `(gripper, block, holding)`, action `(dx, grip)`. A closing grip
/// (`grip > 0`) within `grasp_radius` of the block picks it up; an opening
/// grip (`grip < 0`) releases it. Grasp and release are decided on the
/// pre-move positions, then the gripper moves and a held block moves with it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PickPlace1D {
    pub a_max: f64,
    pub grasp_radius: f64,
}

impl Default for PickPlace1D {
    fn default() -> Self {
        Self {
            a_max: 0.05,
            grasp_radius: 0.02,
        }
    }
}

const NAMES: [&str; 5] = ["carry-right", "carry-left", "short-hop", "fetch-back", "long-haul"];

impl PickPlace1D {
    fn toward(&self, from: f64, to: f64, gain: f64) -> f64 {
        (gain * (to - from)).clamp(-self.a_max, self.a_max)
    }

    fn scripted(&self, s: &[f64], goal: &[f64], gain: f64) -> Vec<f64> {
        let (g, b, holding) = (s[0], s[1], s[2] > 0.5);
        let target = goal[1];
        let placed = (b - target).abs() < 0.01;
        if holding {
            if placed {
                vec![0.0, -1.0]
            } else {
                vec![self.toward(b, target, gain), 1.0]
            }
        } else if (b - target).abs() < 0.025 {
            // close enough: keep the block where it is
            vec![0.0, -1.0]
        } else if (g - b).abs() < self.grasp_radius * 0.75 {
            vec![0.0, 1.0]
        } else {
            vec![self.toward(g, b, gain), -1.0]
        }
    }
}

impl Env for PickPlace1D {
    fn name(&self) -> &'static str {
        "pickplace"
    }

    fn state_dim(&self) -> usize {
        3
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn clamp_action(&self, a: &[f64]) -> Vec<f64> {
        vec![a[0].clamp(-self.a_max, self.a_max), a[1].clamp(-1.0, 1.0)]
    }

    fn step(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_dims(self, s, a)?;
        let (g, mut b) = (s[0], s[1]);
        let mut holding = s[2] > 0.5;
        let (dx, grip) = (a[0].clamp(-self.a_max, self.a_max), a[1].clamp(-1.0, 1.0));
        if !holding && grip > 0.0 && (g - b).abs() < self.grasp_radius {
            holding = true;
        } else if holding && grip < 0.0 {
            holding = false;
        }
        let g2 = (g + dx).clamp(-1.0, 1.0);
        if holding {
            b = (b + (g2 - g)).clamp(-1.0, 1.0);
        }
        Ok(vec![g2, b, if holding { 1.0 } else { 0.0 }])
    }

    fn success(&self, s: &[f64], goal: &[f64], eps: f64) -> bool {
        (s[1] - goal[1]).abs() < eps
    }

    fn task_name(&self, family: usize) -> &'static str {
        NAMES[family % NAMES.len()]
    }

    fn sample_task(&self, family: usize, rng: &mut dyn rand::RngCore) -> (Vec<f64>, Vec<f64>) {
        let (g, b, t) = match family % 5 {
            0 => (around(rng, -0.8, 0.1), around(rng, -0.4, 0.1), around(rng, 0.5, 0.1)),
            1 => (around(rng, 0.8, 0.1), around(rng, 0.4, 0.1), around(rng, -0.5, 0.1)),
            2 => {
                let b = around(rng, 0.0, 0.1);
                let dir = if uniform(rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 };
                (around(rng, -0.3 * dir, 0.1), b, b + dir * around(rng, 0.4, 0.05))
            }
            3 => (around(rng, 0.8, 0.1), around(rng, -0.5, 0.1), around(rng, 0.5, 0.1)),
            _ => (around(rng, -0.85, 0.05), around(rng, -0.75, 0.05), around(rng, 0.75, 0.05)),
        };
        (vec![g, b, 0.0], vec![t, t, 0.0])
    }

    fn sample_free(&self, rng: &mut dyn rand::RngCore) -> (Vec<f64>, Vec<f64>) {
        let g = uniform(rng, -0.95, 0.95);
        let b = uniform(rng, -0.95, 0.95);
        let t = uniform(rng, -0.95, 0.95);
        (vec![g, b, 0.0], vec![t, t, 0.0])
    }

    fn expert_action(&self, s: &[f64], goal: &[f64]) -> Vec<f64> {
        self.scripted(s, goal, 1.0)
    }

    fn proportional_action(&self, s: &[f64], goal: &[f64]) -> Vec<f64> {
        self.scripted(s, goal, 0.2)
    }

    fn random_action(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        vec![uniform(rng, -self.a_max, self.a_max), uniform(rng, -1.0, 1.0)]
    }

    fn coverage_coords(&self, s: &[f64]) -> (f64, f64) {
        (s[0], s[1])
    }
}
