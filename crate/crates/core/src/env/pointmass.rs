use super::{around, check_dims, uniform, Env};
use crate::error::Result;

/// A point in `[-1, 1]²` moved by bounded displacements.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMass2D {
    pub a_max: f64,
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self { a_max: 0.05 }
    }
}

const NAMES: [&str; 5] = ["left-right", "bottom-top", "diagonal", "anti-diagonal", "center-out"];

impl Env for PointMass2D {
    fn name(&self) -> &'static str {
        "pointmass"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn clamp_action(&self, a: &[f64]) -> Vec<f64> {
        a.iter().map(|v| v.clamp(-self.a_max, self.a_max)).collect()
    }

    fn step(&self, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
        check_dims(self, s, a)?;
        Ok(s.iter().zip(self.clamp_action(a)).map(|(x, d)| (x + d).clamp(-1.0, 1.0)).collect())
    }

    fn success(&self, s: &[f64], goal: &[f64], eps: f64) -> bool {
        (s[0] - goal[0]).abs().max((s[1] - goal[1]).abs()) < eps
    }

    fn task_name(&self, family: usize) -> &'static str {
        NAMES[family % NAMES.len()]
    }

    fn sample_task(&self, family: usize, rng: &mut dyn rand::RngCore) -> (Vec<f64>, Vec<f64>) {
        let mut p = |cx: f64, cy: f64, h: f64| vec![around(rng, cx, h), around(rng, cy, h)];
        match family % 5 {
            0 => (p(-0.75, 0.0, 0.15), p(0.75, 0.0, 0.15)),
            1 => (p(0.0, -0.75, 0.15), p(0.0, 0.75, 0.15)),
            2 => (p(-0.7, -0.7, 0.15), p(0.7, 0.7, 0.15)),
            3 => (p(0.7, -0.7, 0.15), p(-0.7, 0.7, 0.15)),
            _ => {
                let start = p(0.0, 0.0, 0.1);
                let (sx, sy) = (if uniform(rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 }, if uniform(rng, 0.0, 1.0) < 0.5 { -1.0 } else { 1.0 });
                let goal = vec![around(rng, 0.75 * sx, 0.1), around(rng, 0.75 * sy, 0.1)];
                (start, goal)
            }
        }
    }

    fn sample_free(&self, rng: &mut dyn rand::RngCore) -> (Vec<f64>, Vec<f64>) {
        let mut p = || vec![uniform(rng, -0.95, 0.95), uniform(rng, -0.95, 0.95)];
        (p(), p())
    }

    fn expert_action(&self, s: &[f64], goal: &[f64]) -> Vec<f64> {
        // straight line: scale the displacement so its largest component is a_max
        let d = [goal[0] - s[0], goal[1] - s[1]];
        let m = d[0].abs().max(d[1].abs());
        let k = if m > self.a_max { self.a_max / m } else { 1.0 };
        vec![d[0] * k, d[1] * k]
    }

    fn proportional_action(&self, s: &[f64], goal: &[f64]) -> Vec<f64> {
        self.clamp_action(&[0.2 * (goal[0] - s[0]), 0.2 * (goal[1] - s[1])])
    }

    fn random_action(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        (0..2).map(|_| uniform(rng, -self.a_max, self.a_max)).collect()
    }

    fn coverage_coords(&self, s: &[f64]) -> (f64, f64) {
        (s[0], s[1])
    }
}
