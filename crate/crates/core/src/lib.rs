pub mod arena;
pub mod corpus;
pub mod detector;
pub mod diffmath;
pub mod generator;
pub mod metrics;
pub mod plot;
pub mod seeding;
pub mod simulator;
pub mod textfeat;
pub mod theoryhall;
