//! File formats: the HTRT tensor container, binary PGM masks, and CSV
//! JTables. Every reader rejects malformed input with a specific error and
//! never yields a partially initialized value.

pub mod container;
pub mod jtable;
pub mod pgm;
