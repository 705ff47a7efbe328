//! Dense tensors, unitary FFTs, convolutions and a small reverse-mode AD tape.

pub mod adam;
pub mod conv;
pub mod fft;
pub mod gradcheck;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use conv::{conv2d, correlate2d, ConvGeometry, Padding};
pub use fft::{dft2, dft2_complex, idft2, transfer_function};
pub use gradcheck::finite_difference_gradient;
pub use params::{ParamBlock, ParamVector};
pub use tape::{LinearMap, Linearization, Tape, Var};
pub use tensor::{ComplexImageTensor, ImageTensor, Shape};
