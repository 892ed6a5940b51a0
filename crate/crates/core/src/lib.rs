pub mod baseline;
pub mod checkpoint;
pub mod corpus;
pub mod diffcore;
pub mod metrics;
pub mod model;
pub mod ontology;
pub mod registry;
pub mod training;
