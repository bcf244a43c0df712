use thiserror::Error;

use crate::addr::Address;
use crate::config::ConfigError;
use crate::event::Crashed;
use crate::pmem::PmemError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pmem(#[from] PmemError),
    /// A scheduled crash point was reached; the machine must be powered off.
    #[error("crash injected at event {}", .0.event_index)]
    Crashed(Crashed),
    #[error("simulator fault: {0}")]
    SimFault(String),
    #[error("core {0} already runs a transaction")]
    NestedTransaction(usize),
    #[error("no active transaction on core {0}")]
    NoActiveTx(usize),
    #[error("transaction ids exhausted after {0} transactions")]
    TxIdExhausted(u64),
    #[error("line {addr} is held by live transaction {owner}")]
    TxConflict { addr: Address, owner: u32 },
    #[error("transaction {requester} read uncommitted line {addr} of transaction {owner}")]
    IsolationViolation { addr: Address, requester: u32, owner: u32 },
    /// The transaction was aborted underneath its thread (conflict or isolation).
    #[error("transaction {0} was aborted")]
    TxAborted(u32),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("corrupt dump: {0}")]
    CorruptDump(String),
}

impl From<Crashed> for SimError {
    fn from(c: Crashed) -> Self {
        SimError::Crashed(c)
    }
}

impl SimError {
    pub fn is_crash(&self) -> bool {
        matches!(self, SimError::Crashed(_))
    }
}

pub type SimResult<T> = Result<T, SimError>;
