//! Bike-mounted air-quality sensing, end to end.
//!
//! Virtual devices sample a CO sensor and a GPS receiver into SD-card logs
//! and upload them over an MQTT subset to an ingestion service that
//! deduplicates, stores, aggregates and exports the readings. A
//! deterministic fleet simulator drives the whole pipeline.

pub mod clock;
pub mod firmware;
pub mod geo;
pub mod ingest;
pub mod mqtt;
pub mod nmea;
pub mod sensor;
pub mod sim;

pub use clock::Millis;
