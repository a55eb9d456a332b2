//! Tool-as-embodiment manipulation learning on a planar workspace.
//!
//! One action-value network serves both a bare gripper and a gripper holding
//! a tool: the end effector is rendered into the same four-channel map either
//! way, matched against the scene by cross convolution, and decoded into a
//! dense grid of success probabilities over position and orientation.

pub mod data;
pub mod grid;
pub mod harness;
pub mod model;
pub mod policy;
pub mod repr;
pub mod sim;
pub mod tensor;
