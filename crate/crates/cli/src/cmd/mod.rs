pub mod measure;
pub mod pick;
pub mod setup;
pub mod simulate;
pub mod summation;
