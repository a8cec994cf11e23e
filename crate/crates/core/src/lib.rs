//! Multi-stage text-to-SQL: divide-and-merge parsing, execution-accuracy
//! scoring, adaptive routing and evaluation reports.

pub mod dataset;
pub mod executor;
pub mod harness;
pub mod llm;
pub mod pipeline;
pub mod prompts;
pub mod router;
pub mod stats;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
    #[doc = include_str!("../../../book/src/execution-accuracy.md")]
    mod execution_accuracy {}
    #[doc = include_str!("../../../book/src/routing.md")]
    mod routing {}
    #[doc = include_str!("../../../book/src/report-math.md")]
    mod report_math {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
}
