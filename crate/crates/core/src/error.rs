use thiserror::Error;

use crate::types::{InstanceId, Payload, ProcessId};

/// A state machine was driven in a way its protocol forbids. Always a bug in
/// the caller or the scenario, never a Byzantine effect.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("{server} proposed twice to instance {instance}")]
    DoublePropose { server: ProcessId, instance: InstanceId },
    #[error("{client} broadcast {message:?} twice")]
    DuplicateBroadcast { client: ProcessId, message: Payload },
    #[error("{process} cannot handle input {input}")]
    UnsupportedInput { process: ProcessId, input: String },
}
