pub use bankbm_core;
