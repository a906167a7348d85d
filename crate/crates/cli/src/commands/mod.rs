pub mod battery;
pub mod gen;
pub mod report;
pub mod train;
pub mod validate;
