pub mod matrix;
pub mod seeding;
pub mod simkit;
pub mod featkit;
pub mod netcore;
pub mod criteria;
pub mod kws;
pub mod pipeline;
