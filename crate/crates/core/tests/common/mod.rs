#![allow(dead_code)]

pub mod geometry_checks;
pub mod lp;
pub mod oracle;
pub mod props;
