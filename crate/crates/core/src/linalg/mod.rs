//! Linear-algebra building blocks: banded LU, block-tridiagonal Green's
//! function sweeps and thin wrappers over dense `faer` decompositions.

pub mod banded;
pub mod dense;
pub mod rgf;
pub mod small;

pub use banded::{Banded, BandedLu};
pub use rgf::{BlockTridiagonal, GreenDiagonal};
pub use small::SmallMat;
