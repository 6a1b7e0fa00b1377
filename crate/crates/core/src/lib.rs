pub mod tensor;
pub mod dsp;
pub mod mixsim;
pub mod am;
pub mod separator;
pub mod trainer;
pub mod evalcli;
