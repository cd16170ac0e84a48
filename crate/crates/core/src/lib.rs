pub mod cone;
pub mod coercivity;
pub mod error;
pub mod feas;
pub mod field;
pub mod linalg;
pub mod mayer;
pub mod mesh;
pub mod newton;
pub mod nlp;
pub mod ocp;
pub mod par;
pub mod registry;
pub mod report;
pub mod parse;
pub mod smsr;
pub mod poly;
pub mod problem;
