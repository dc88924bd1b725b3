pub mod autodiff;
pub mod carving;
pub mod data;
pub mod extract;
pub mod fields;
pub mod image;
pub mod losses;
pub mod optim;
pub mod render;
pub mod sim;
pub mod train;
