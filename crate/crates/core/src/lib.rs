pub mod annotations;
pub mod canonical;
pub mod engine;
pub mod geometry;
pub mod interaction;
pub mod layers;
pub mod model;
pub mod ops;
pub mod provenance;
pub mod scenarios;
pub mod views;
pub mod synth;
