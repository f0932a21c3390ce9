//! Small double-precision learning toolkit: tensors, a reverse-mode tape,
//! the recurrent and convolutional layers needed for sentence and document
//! encoders, an Adam optimizer, and a finite-difference gradient checker.

pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use gradcheck::{check_graph, grad_check, relative_error, GradCheckConfig, GradCheckReport};
pub use graph::{bce_grad, bce_value, Graph, NodeId};
pub use layers::{dropout, dropout_node, Activation, BiLstm, ConvBank, ConvBankSpec, Dense};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;
