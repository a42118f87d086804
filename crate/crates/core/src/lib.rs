//! Back-translation of finite trace sets into source programs.

pub mod codegen;
pub mod dump;
pub mod fixtures;
pub mod harness;
pub mod lex;
pub mod passes;
pub mod replay;
pub mod source;
pub mod trace;
pub mod tree;
