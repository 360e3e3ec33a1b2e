//! CIFG LSTM teacher language model with hand-written backpropagation.

mod checkpoint;
mod cifg;
mod config;
mod train;

pub use checkpoint::{load, read_checkpoint, save, write_checkpoint};
pub use cifg::{CifgLstm, CifgState};
pub use config::{CifgConfig, LayerSlots, Layout};
pub use train::{grad_check, grad_check_with, train_batch, GradCheck, SgdConfig, TrainState, FD_STEP};
