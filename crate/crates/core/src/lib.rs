pub mod diffcore;
pub mod motiondata;
pub mod model;
pub mod losses;
pub mod training;
pub mod synthesis;
pub mod eval;
