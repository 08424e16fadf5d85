//! Goal-conditioned value functions as a natural language critic.
//!
//! The pipeline: collect offline trajectories ([`envworld`], [`trajdata`]),
//! hindsight-relabel them into goal-reaching tuples ([`trajdata`]), embed the
//! texts ([`embed`]), train a lightweight Q/V pair with expectile regression
//! ([`valuefn`]), and use the trained critic at inference to score
//! hypothetical positive/negative outcomes of an agent's proposed thought and
//! drive a bounded self-refinement loop ([`critic`], [`agent`]). Everything is
//! verifiable end-to-end on enumerable synthetic environments against an
//! exact dynamic-programming reference ([`oracle`]).

pub mod agent;
pub mod critic;
pub mod embed;
pub mod envworld;
pub mod oracle;
pub mod provider;
pub mod trajdata;
pub mod valuefn;
