pub mod log;
pub mod message;
pub mod replay;
pub mod server;
pub mod session;
