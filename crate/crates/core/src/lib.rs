pub mod arena;
pub mod features;
pub mod lm;
pub mod search;
pub mod tm;
pub mod driver;
pub mod oracle_bench;
