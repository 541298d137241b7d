pub mod scalar;
pub mod tensor;
pub mod datakit;
pub mod evalkit;
pub mod filterkit;
pub mod losses;
pub mod nn;
pub mod pipeline;
pub mod segkit;
pub mod translate;
