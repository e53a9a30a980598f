//! A vision-only web agent engine.
//!
//! The agent drives a browser purely from screenshots: a *policy* model reads
//! the task and recent history and proposes the next action, a *localizer*
//! model turns element descriptions into pixel coordinates, and a *validator*
//! model gates every proposed answer, feeding rejections back into the agent's
//! notepad so the next attempt can do better. No DOM, no accessibility tree.
//!
//! The crate ships the full loop plus the harnesses around it:
//!
//! - [`domain`] — tasks, actions, steps, memory and episode traces
//! - [`gateway`] — chat-endpoint client with token accounting and pricing
//! - [`policy`], [`localizer`], [`validator`] — the three model-backed modules
//! - [`env`] — browser environments: a deterministic simulator and a live
//!   WebDriver driver (feature `live`)
//! - [`orchestrator`] — the attempt/step loop with budgets and trace recording
//! - [`fbc`] — filtered behavioral-cloning export of successful traces
//! - [`bench`] — benchmark runner with date shifting and majority-vote judging
//! - [`config`] — config file loading and validation

pub mod bench;
pub mod config;
pub mod domain;
pub mod env;
pub mod fbc;
pub mod gateway;
pub mod localizer;
pub mod orchestrator;
pub mod policy;
pub mod util;
pub mod validator;
