//! Classical channel between the two nodes: framing, typed messages, byte
//! accounting, transports and the per-epoch protocol.

mod frame;
mod ledger;
mod messages;
mod offline;
mod records;
mod session;
mod transport;

use thiserror::Error;

pub use frame::{Frame, FrameError, MessageType, HEADER_LEN, MAX_PAYLOAD};
pub use ledger::{write_comm_load_csv, Category, CommLedger, COMM_LOAD_HEADER};
pub use messages::{basis_only, AbortReason, Message, MessageError, PROTOCOL_VERSION};
pub use offline::{
    apply_node_clicks, node_stream, open_node_store, run_offline, run_offline_streams, simulate_node_streams,
    write_node_outputs, OfflineError, OfflineRun,
};
pub use records::{
    combine_epochs, join_pair_logs, load_session_dir, read_epochs_csv, read_pairs_csv, write_epochs_csv,
    write_pairs_csv, PairRecord, COMM_LOAD_FILE, EPOCHS_FILE, KEYS_DIR, PAIRS_FILE,
};
pub use session::{run_session, SessionFailure, SessionOutcome, MIN_SIFTED_BITS};
pub use transport::{accept_one, connect_with_retry, duplex, Link, PipeEnd, TcpTransport, MAX_EVENTS_PER_FRAME};

use crate::privacy::PrivacyError;
use crate::reconcile::ReconcileError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Message(#[from] MessageError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("peer aborted the session ({reason:?}): {detail}")]
    PeerAbort { reason: AbortReason, detail: String },
    #[error(transparent)]
    Reconcile(#[from] ReconcileError),
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("configuration: {0}")]
    Config(String),
}
