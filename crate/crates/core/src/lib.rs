pub mod aaut;
pub mod diagram;
pub mod error;
pub mod io;
pub mod localgroup;
pub mod perm;
pub mod presentation;
pub mod selfsim;
pub mod thompson;
pub mod tree;
