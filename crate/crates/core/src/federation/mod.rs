//! Model exchange between edges and the server: the binary model format,
//! protocol frames, transports, the bagging ensemble and the round driver.

mod ensemble;
pub mod frame;
pub mod privacy;
mod simulation;
pub mod transport;
pub mod wire;

pub use ensemble::{build_ensemble, ensemble_predict, EnsembleModel, SERVER_DEVICE_ID};
pub use frame::{decode_frame, decode_stream, encode_frame, read_frame, ModelEnvelope, MsgType, ReadFrameError};
pub use privacy::{row_encoding, scan_transcript, PrivacyHit};
pub use simulation::{
    device_name, reports_to_rows, run_edge, run_federated_simulation, run_server, simulate, split_for_device, split_partitions,
    DeviceReport, EdgeOutcome, EdgeRound, RoundConfig, RoundReport, ServerOutcome, ServerRound, SimulationOutcome,
    StopReason, TransportKind,
};
pub use transport::{Connector, FrameLink, Listener, TcpConnector, TcpFrameListener};
pub use wire::{deserialize_ensemble, deserialize_model, serialize_ensemble, serialize_model};
