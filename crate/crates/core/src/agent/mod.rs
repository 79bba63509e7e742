//! Agent runtime: prompting, response parsing, model backends and the episode loop.

pub mod backend;
pub mod episode;
pub mod parse;
pub mod prompt;

pub use backend::{
    BackendError, BackendResponse, HttpBackend, HttpBackendConfig, Message, PolicyBackend, Role, SamplingParams,
    ScriptedBackend, ScriptedFixture, ScriptedStep,
};
pub use episode::{batch_run, run_episode, BatchError, BatchOutput, EpisodeConfig, EpisodeError, TaskFailure};
pub use parse::{parse_step, ParsedStep, StepKind};
pub use prompt::{render_prompt, PromptError, PromptTemplate};
