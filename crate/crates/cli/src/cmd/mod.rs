pub mod analysis;
pub mod judge;
pub mod linear;
pub mod prompt;
pub mod scan;
pub mod synonyms;
