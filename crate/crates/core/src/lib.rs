pub mod audit_protocol;
pub mod commitment;
pub mod group;
pub mod measurement;
pub mod random_list;
pub mod sim_harness;
