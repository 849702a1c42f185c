pub mod evaluate;
pub mod experiment;
pub mod fuse;
pub mod report;
