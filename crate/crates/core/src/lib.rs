pub mod calibration;
pub mod distributions;
pub mod evaluation;
pub mod pipeline;
pub mod reasoning;
pub mod special;
pub mod surprise;
pub mod taxonomy;
pub mod typicality;
