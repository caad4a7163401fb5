//! Transports: a deterministic simulated network and length-prefixed TCP.

mod endpoint;
pub mod frame;
pub mod sim;
pub mod tcp;

pub use endpoint::{Endpoint, EndpointParseError, Scheme};
pub use frame::{decode_frame, encode_frame, FrameError, MAX_FRAME};
pub use sim::{Cluster, Deliver, Delivery, Receipt, SendError, SimNetwork};
pub use tcp::{Inbound, TcpTransport, TransportError};
