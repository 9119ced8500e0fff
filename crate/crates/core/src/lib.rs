//! Building blocks for low-complexity OFDM neural receivers.
//!
//! * [`tensor`]: NHWC tensors, differentiable operators and AdamW.
//! * [`nn`]: ResNet-T / ResNet-SS blocks and complete receiver networks.
//! * [`complexity`]: parameter, FLOP, memory-access and energy accounting.
//! * [`phy`]: QAM, resource grids, tapped-delay-line fading and AWGN.
//! * [`receivers`]: perfect-CSI, LS and LMMSE baseline receivers.
//! * [`coding`]: a small LDPC code with belief-propagation decoding and BLER statistics.

pub mod coding;
pub mod complexity;
pub mod gradsuite;
pub mod nn;
pub mod phy;
pub mod receivers;
pub mod seed;
pub mod tensor;
