//! Small reverse-mode autodiff engine: tensors, a define-by-run tape, the
//! conv/pool/upsample/dense layers a probabilistic U-Net needs, Adam, and a
//! flat checkpoint format.

mod conv;
mod element;
mod error;
mod tensor;

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod params;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use element::Element;
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;

pub use echoseg_core::par::Backend;
