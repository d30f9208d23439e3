#![allow(dead_code)]

pub mod flops_oracle;
pub mod frontier_oracle;
pub mod grad_check;
pub mod net_oracle;
pub mod trace_gen;
