//! Learned image compression runtime: numerics kernels, entropy coding,
//! factorized-prior and scale-hyperprior codecs, a multi-stage pipeline and
//! TCP streaming.

pub mod codec;
pub mod entropy;
pub mod image;
pub mod numerics;
pub mod pipeline;
pub mod stream;
