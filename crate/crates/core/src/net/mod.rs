//! Dense networks with ReLU, ELU, and sinusoidal layers; exact input
//! gradients; value-plus-gradient (Sobolev) and actor losses with their
//! parameter gradients; Adam; Polyak averaging; checkpoints.

mod adam;
pub mod checkpoint;
mod loss;
mod mlp;

pub use adam::{adam_step, polyak_update, AdamState};
pub use loss::{
    actor_control, actor_loss_and_param_grad, logsym, logsym_derivative, sobolev_loss_and_param_grad,
    ActorLoss, SobolevBatch, SobolevLoss,
};
pub use mlp::{Activation, Layer, MlpNetwork, NetworkArch, ParamGrads};
