pub mod qp_oracle;
pub mod synthetic;
