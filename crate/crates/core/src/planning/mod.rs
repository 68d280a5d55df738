mod episode;
mod plan;
mod select;

pub use episode::{diagnostics_csv, diagnostics_svg, CandidateRecord, PadController, ReplanController, DIAGNOSTICS_HEADER};
pub use plan::{
    candidate_init, decode_plan_actions, encode_states, pad_past, plan, refine_candidates, Candidate, Plan, PlanRequest,
    PlanSettings,
};
pub use select::{lambda_probabilities, sample_lambda_biased, select_top_k};
