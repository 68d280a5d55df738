use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::plan::{decode_plan_actions, plan, PlanRequest, PlanSettings};
use crate::env::{Controller, Env, EpisodeResult};
use crate::error::{PadError, Result};
use crate::models::{EnergyModel, InverseDynamics};

/// One candidate of one planner call, for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub replan: usize,
    pub candidate: usize,
    pub lambda: f64,
    pub energy: f64,
    pub chosen: bool,
}

pub const DIAGNOSTICS_HEADER: &str = "replan_idx,candidate_idx,lambda,energy,chosen";

pub fn diagnostics_csv(records: &[CandidateRecord]) -> String {
    let mut out = format!("{DIAGNOSTICS_HEADER}\n");
    for r in records {
        let _ = writeln!(out, "{},{},{},{},{}", r.replan, r.candidate, r.lambda, r.energy, u8::from(r.chosen));
    }
    out
}

/// Scatter of final energy against λ, one panel row per planner call; the
/// chosen candidate is drawn in red.
pub fn diagnostics_svg(records: &[CandidateRecord]) -> String {
    let finite: Vec<&CandidateRecord> = records.iter().filter(|r| r.energy.is_finite()).collect();
    let lo = finite.iter().map(|r| r.energy).fold(f64::INFINITY, f64::min);
    let hi = finite.iter().map(|r| r.energy).fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h, m) = (480.0, 320.0, 40.0);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{m}\" y=\"20\" font-size=\"12\">final energy vs lambda ({} candidates)</text>\n\
         <line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n",
        records.len(),
        h - m,
        w - m,
        h - m,
        h - m
    );
    for r in &finite {
        let x = m + r.lambda * (w - 2.0 * m);
        let y = h - m - (r.energy - lo) / span * (h - 2.0 * m);
        let (fill, rad) = if r.chosen { ("red", 4) } else { ("steelblue", 2) };
        let _ = writeln!(out, "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{rad}\" fill=\"{fill}\"/>");
    }
    let _ = writeln!(out, "<text x=\"{}\" y=\"{}\" font-size=\"11\">lambda</text>", w / 2.0, h - 10.0);
    let _ = writeln!(out, "<text x=\"4\" y=\"{}\" font-size=\"11\">energy [{lo:.3}, {hi:.3}]</text>", m - 8.0);
    out.push_str("</svg>\n");
    out
}

/// Receding-horizon schedule: plan, execute `interval` actions, replan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplanController {
    pub interval: usize,
    pub max_steps: usize,
}

impl ReplanController {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.interval == 0 || self.interval > horizon {
            return Err(PadError::Config(format!(
                "replan interval must be in 1..={horizon}, got {}",
                self.interval
            )));
        }
        Ok(())
    }
}

/// Planner plus inverse dynamics driving an environment.
pub struct PadController<'a, M: EnergyModel + ?Sized> {
    pub model: &'a M,
    pub inverse: &'a InverseDynamics,
    pub settings: PlanSettings,
    pub schedule: ReplanController,
    pub record_diagnostics: bool,
}

impl<M: EnergyModel + ?Sized> Controller for PadController<'_, M> {
    fn run_episode(
        &mut self,
        env: &dyn Env,
        start: &[f64],
        goal: &[f64],
        eps: f64,
        max_steps: usize,
        seed: u64,
    ) -> Result<EpisodeResult> {
        self.schedule.validate(self.model.horizon())?;
        self.settings.validate()?;
        if self.inverse.action_dim != env.action_dim() {
            return Err(PadError::Config(format!(
                "inverse dynamics emits {} action dims, {} expects {}",
                self.inverse.action_dim,
                env.name(),
                env.action_dim()
            )));
        }
        let max_steps = max_steps.min(self.schedule.max_steps);
        let keep = self.model.past_len();
        let mut history = vec![start.to_vec()];
        let mut state = start.to_vec();
        let mut out = EpisodeResult::default();
        'episode: while !env.success(&state, goal, eps) && out.steps < max_steps {
            let req = PlanRequest {
                past: &history,
                goal,
                settings: self.settings.clone(),
                seed,
                call: out.planner_calls as u64,
            };
            let planned = plan(self.model, &req).and_then(|p| {
                let n = self.schedule.interval.min(max_steps - out.steps);
                let actions = decode_plan_actions(self.model, self.inverse, &state, &p.chosen().z, n)?;
                Ok((p, actions))
            });
            let (p, actions) = match planned {
                Ok(x) => x,
                Err(e) => {
                    out.failure = Some(e.to_string());
                    break;
                }
            };
            if self.record_diagnostics {
                out.diagnostics.extend(p.candidates.iter().enumerate().map(|(i, c)| CandidateRecord {
                    replan: out.planner_calls,
                    candidate: i,
                    lambda: c.lambda,
                    energy: c.energy,
                    chosen: i == p.chosen,
                }));
            }
            out.planner_calls += 1;
            for a in actions {
                let a = env.clamp_action(&a);
                match env.step(&state, &a) {
                    Ok(next) => state = next,
                    Err(e) => {
                        out.failure = Some(e.to_string());
                        break 'episode;
                    }
                }
                out.actions.push(a);
                out.steps += 1;
                history.push(state.clone());
                if history.len() > keep {
                    history.remove(0);
                }
                if env.success(&state, goal, eps) {
                    break;
                }
            }
        }
        out.success = out.failure.is_none() && env.success(&state, goal, eps);
        out.final_state = state;
        Ok(out)
    }
}
