pub mod cachesim;
pub mod cg;
pub mod faultmodel;
pub mod inject;
pub mod layout;
pub mod pipeline;
pub mod stats;
pub mod trace;
pub mod vulnmetrics;
