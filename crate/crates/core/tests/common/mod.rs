#![allow(dead_code)]

pub use gpgd::linop::DenseMatrix;

pub mod oracle;
