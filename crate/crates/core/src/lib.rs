pub mod alias;
pub mod apgraph;
pub mod corpus;
pub mod fuzz;
pub mod interproc;
pub mod ir;
pub mod liveness;
pub mod oracle;
pub mod report;
