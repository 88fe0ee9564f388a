//! Generator and discriminators.

pub mod discriminator;
pub mod generator;
pub mod layers;

pub use discriminator::{DiscriminatorBank, DiscriminatorSpec, PatchDiscriminator, PatchOutput};
pub use generator::{Generator, GeneratorSpec};
pub use layers::{ParamInit, Parameters};
