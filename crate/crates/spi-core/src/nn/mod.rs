//! The trainable stack: mask layer, generator, discriminator, and the frozen
//! perceptual extractor, built on hand-rolled layers with explicit backward
//! passes. Forward passes are read-only on parameters; training mutates them
//! through a single owner.

pub mod discriminator;
pub mod generator;
pub mod layers;
pub mod mask_layer;
pub mod param;
pub mod perceptual;

pub use discriminator::{Discriminator, DiscriminatorConfig};
pub use generator::{Generator, GeneratorConfig};
pub use mask_layer::{init_mask_layer, ste_gradient, MaskLayer};
pub use param::{Adam, Param};
pub use perceptual::{PerceptualConfig, PerceptualExtractor};
