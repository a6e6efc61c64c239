//! Reference oracles and the acceptance checks built on them.

pub mod oracles;
pub mod composition;
pub mod criteria;
