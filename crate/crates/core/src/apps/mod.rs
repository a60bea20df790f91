pub mod color;
pub mod flow;
