mod experiments;
mod metrics;
mod pipeline;
mod report;

pub use experiments::*;
pub use metrics::*;
pub use pipeline::*;
pub use report::*;
