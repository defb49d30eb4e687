//! A 2-D point-navigation task with an excluded "hole" region, behavior
//! policies, offline dataset collection and the evaluation protocols.

mod dataset;
mod episode;
mod point_nav;

pub use dataset::{
    collect_dataset, normalize, Behavior, ContinuousDataset, DatasetMetadata, DatasetPart,
    Transition, TransitionArrays, DEFAULT_PD_GAIN, STD_FLOOR,
};
pub use episode::{run_episode, EpisodeTrace, PerturbProtocol, DEFAULT_PERTURB_MAGNITUDE};
pub use point_nav::{
    env_reset, env_step, PointNavConfig, Rect, StartMode, StepOutcome, ACTION_DIM, GOAL_BONUS,
    STATE_DIM,
};
