//! C ABI for the lsds library. Populated alongside the core crate.
