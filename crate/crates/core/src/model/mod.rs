//! Tasks, actions, trajectories, agent context and the demonstration pool.

mod action;
mod context;
mod persist;
mod pool;
mod trajectory;

pub use action::{Action, FINISH, LOOKUP, SEARCH};
pub use context::AgentContext;
pub use persist::{
    load_pool, load_runs, load_tk_cache, read_jsonl, save_pool, save_runs, save_tk_cache, tk_cache_path, write_atomic,
    POOL_HEADER,
};
pub use pool::{AdmissionStats, DemoPool};
pub use trajectory::{content_id, render_steps, Step, Trajectory};
