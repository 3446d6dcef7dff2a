pub mod gp;
pub mod par;
pub mod seeding;
pub mod space;
pub mod lift;
pub mod acquisition;
pub mod provider;
pub mod oracle;
pub mod synthetic;
pub mod engine;
pub mod theory;
pub mod trace;
