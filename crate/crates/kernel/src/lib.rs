//! Talking to Jupyter kernels: discovery, launch, and cell execution.

pub mod client;
pub mod connection;
pub mod error;
pub mod kernelspec;
pub mod mock;
pub mod wire;

pub use client::{start_kernel, ClientOptions, KernelHandle};
pub use connection::ConnectionInfo;
pub use error::KernelError;
pub use kernelspec::{InterruptMode, KernelSpec, KernelSpecResolver};
pub use wire::{sign_message, Message, Signer};
