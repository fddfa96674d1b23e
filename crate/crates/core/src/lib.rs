pub mod bench;
pub mod codec;
pub mod datagen;
pub mod demos;
pub mod digest;
pub mod flow;
pub mod geometry;
pub mod guide;
pub mod reasoner;
pub mod runtime;
pub mod sim;
