//! Dense tensors, a reverse-mode tape, and the recurrent and feed-forward
//! layers the model is assembled from.

mod gradcheck;
mod kernels;
mod layers;
mod optim;
mod params;
mod tape;
mod tensor;

pub use kernels::{argmax, cross_entropy, softmax_checked as softmax};
pub use gradcheck::{check_gradients, rel_err, GradCheckReport};
pub use layers::{Activation, Ffn, GruCell};
pub use optim::Adam;
pub use params::{ParamGrads, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, PROB_FLOOR};
pub use tensor::Tensor;
