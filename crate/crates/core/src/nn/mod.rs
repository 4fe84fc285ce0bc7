//! A small reverse-mode autodiff engine over dense `f64` tensors, with the
//! layers the segmenter needs.

mod adam;
mod lstm;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use lstm::{bi_lstm, lstm_step, BoundLstm, LstmParams, GATES};
pub use tape::{CustomOp, Tape, Var};
pub use tensor::{Param, ParamId, ParamSet, Tensor};
